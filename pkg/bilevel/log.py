"""Where progress lines from the solvers and the harness end up.

   Library modules only ever do

       from bilevel.log import log

   The CLI (or a test) picks the sink. Run blocks may execute on a thread
   pool, so each call hands one complete line to the sink under a lock.
"""

import contextlib
import sys
import threading
from typing import Callable, Iterator, List, Tuple

LogFn = Callable[[Tuple], None]

_lock = threading.Lock()


def log_to_none_fn(_args) -> None:
    """Drops the line"""


log_fn: LogFn = log_to_none_fn


def format_line(args: Tuple) -> str:
    return ' '.join(str(arg) for arg in args)


def log(*args) -> None:
    """Sends one line to the current sink. The sink sees the argument tuple."""
    with _lock:
        log_fn(args)


def log_to_fn(fn: LogFn) -> LogFn:
    """Installs fn and returns the sink it replaced."""
    global log_fn  # pylint: disable=global-statement
    with _lock:
        previous, log_fn = log_fn, fn
    return previous


def log_to_none() -> None:
    log_to_fn(log_to_none_fn)


def log_to_file(file) -> None:
    """Writes space separated lines to file, flushing after each one so a
       long run can be followed with tail -f.
    """

    def log_to_file_fn(args) -> None:
        file.write(format_line(args) + '\n')
        file.flush()

    log_to_fn(log_to_file_fn)


def log_to_print() -> None:
    """The CLI default: lines go to whatever sys.stdout is at call time."""

    def log_to_print_fn(args) -> None:
        print(*args, file=sys.stdout, flush=True)

    log_to_fn(log_to_print_fn)


@contextlib.contextmanager
def captured() -> Iterator[List[str]]:
    """Collects formatted lines for the duration of the block, then puts the
       previous sink back.
    """
    lines: List[str] = []
    previous = log_to_fn(lambda args: lines.append(format_line(args)))
    try:
        yield lines
    finally:
        log_to_fn(previous)


log_to_print()
