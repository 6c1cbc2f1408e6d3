#!/usr/bin/env python3
"""
This file tests the dump_vec module.
"""

import unittest

from bilevel.dump_vec import dump_vec

PREFIX = '    x'


class TestDumpVec(unittest.TestCase):
    """Tests for the dump_vec.py file"""

    def setUp(self) -> None:
        self.clear_log()

    def clear_log(self) -> None:
        """Clears any log lines that have accumulated"""
        self.log_lines = []

    def log(self, s: str) -> None:
        """Appends the string to the accumulated log"""
        self.log_lines.append(s)

    def test_empty_vector(self) -> None:
        """Tests passing in an empty vector"""
        dump_vec([], prefix=PREFIX, log=self.log)
        self.assertEqual(self.log_lines, ['    x:No data'])

    def test_none(self) -> None:
        """Tests passing in None"""
        dump_vec(None, log=self.log)
        self.assertEqual(self.log_lines, ['No data'])

    def test_less_than_one_line(self) -> None:
        """Tests less than a full lines worth of data."""
        dump_vec([1.0, -1.5], prefix=PREFIX, log=self.log)
        self.assertEqual(self.log_lines, ['    x: 0000:  1.0000e+00 -1.5000e+00'])

    def test_a_bit_more_than_a_line(self) -> None:
        """Tests a line and a value"""
        dump_vec([0.0, 1.0, 2.0], line_width=2, log=self.log)
        self.assertEqual(self.log_lines, [
            '0000:  0.0000e+00  1.0000e+00',
            '0002:  2.0000e+00',
        ])

    def test_no_index(self) -> None:
        """Tests with the index column turned off"""
        dump_vec([0.25, 0.5], show_index=False, fmt='{:g}', log=self.log)
        self.assertEqual(self.log_lines, ['0.25 0.5'])

    def test_start_index(self) -> None:
        """Tests a non-zero starting index"""
        dump_vec([3.0, 4.0], index=10, line_width=1, fmt='{:.1f}', log=self.log)
        self.assertEqual(self.log_lines, ['0010: 3.0', '0011: 4.0'])

    def test_neg_line_width(self) -> None:
        """Tests a negative line width"""
        dump_vec([1.0] * 7, line_width=-6, fmt='{:.0f}', log=self.log)
        self.assertEqual(self.log_lines, ['0000: 1 1 1 1 1 1', '0006: 1'])


if __name__ == '__main__':
    unittest.main()
