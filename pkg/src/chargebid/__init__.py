"""Two-stage bidding engine for a combined electric / hydrogen charging
station: day-ahead and intraday auction bid curves plus device schedules,
solved by L-shaped decomposition with a built-in LP/MILP core."""

__version__ = "0.1.0"
