"""Provides the dump_vec function, which dumps a vector of floats in rows."""

from typing import Callable, Optional, Sequence

# pylint: disable=too-many-arguments


def dump_vec(vec: Optional[Sequence[float]],
             prefix: str = '',
             index: int = 0,
             line_width: int = 6,
             show_index: bool = True,
             fmt: str = '{:11.4e}',
             log: Callable[[str], None] = print) -> None:
    """Dumps out a row-wise representation of the given vector.

       Each line shows the index of its first entry (starting at `index`)
       followed by up to `line_width` values.
    """
    if line_width <= 0:
        line_width = 6
    if len(prefix) > 0:
        prefix += ':'
    if vec is None or len(vec) == 0:
        log(prefix + 'No data')
        return
    if len(prefix) > 0:
        prefix += ' '
    for offset in range(0, len(vec), line_width):
        line = prefix
        if show_index:
            line += f'{index:04d}: '
        line += ' '.join([fmt.format(float(val))
                          for val in vec[offset:offset + line_width]])
        log(line)
        index += line_width
