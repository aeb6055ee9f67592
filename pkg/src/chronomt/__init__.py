"""chronomt: chronology-aware ancient-to-modern character translation."""

__version__ = "0.1.0"
