"""Small numeric and text helpers."""
