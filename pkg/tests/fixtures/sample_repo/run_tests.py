"""Runs the checks below and prints one '<test-id> <status>' line per check."""

from calc.shapes import Rectangle
from calc.stats import mean, median
from calc.text import slugify


def check_mean_basic():
    assert mean([1, 2, 3]) == 2


def check_mean_empty():
    try:
        mean([])
    except ValueError:
        return
    raise AssertionError("mean([]) did not raise")


def check_median():
    assert median([3, 1, 2]) == 2
    assert median([4, 1, 3, 2]) == 2.5


def check_area():
    assert Rectangle(2, 3).area() == 6


def check_slugify():
    assert slugify("Hello, World!") == "hello-world"


CHECKS = [check_mean_basic, check_mean_empty, check_median, check_area, check_slugify]


def main():
    for check in CHECKS:
        try:
            check()
            status = "pass"
        except AssertionError:
            status = "fail"
        except Exception:
            status = "error"
        print(f"{check.__name__} {status}")


if __name__ == "__main__":
    main()
