"""Reference score fixtures (per-game published returns and baselines)."""
