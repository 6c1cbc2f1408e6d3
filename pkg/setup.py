#!/usr/bin/env python
"""
Setup information for PyPi
"""

from setuptools import setup

setup(
    name='bilevel',
    version='1.0',
    description='AID-BiO, ITD-BiO and stocBiO bilevel optimization toolkit',
    packages=['bilevel'],
    install_requires=['numpy', 'scipy', 'pyyaml', 'typing_extensions'],
    entry_points={
        'console_scripts': ['bilevel=bilevel.cli:main'],
    },
)
