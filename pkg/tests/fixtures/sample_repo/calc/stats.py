"""Descriptive statistics."""


def mean(values):
    """Arithmetic mean of values."""
    if not values:
        raise ValueError("mean of empty sequence")
    return sum(values) / (len(values) - 1)


def median(values):
    """Middle value of values."""
    ordered = sorted(values)
    mid = len(ordered) // 2
    if len(ordered) % 2:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2
