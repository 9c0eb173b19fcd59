"""Reference restriction pattern of the 30-variable, five-shock application.

``IMPACT_SIGNS`` and ``NARRATIVE_SIGNS`` reproduce the identification scheme
for five shocks (oil supply news, monetary policy, technology, financial risk,
government spending).  They serve as a realistic fixture for the
sign-uniqueness check and the restriction file format.
"""

from __future__ import annotations

import numpy as np

from .model import Dataset, RestrictionSet, expand_signs, shock_signs

__all__ = [
    "SHOCKS",
    "VARIABLES",
    "IMPACT_SIGNS",
    "NARRATIVE_SIGNS",
    "impact_sign_table",
    "narrative_entries",
    "restriction_set",
    "quarters",
]

SHOCKS = ("oil_supply", "monetary_policy", "technology", "financial_risk", "government_spending")

_ROWS = [
    ("GDP", (0, -1, 1, 0, 0)),
    ("Consumption", (0, -1, 1, 0, 0)),
    ("Investment", (0, -1, 0, 0, 0)),
    ("Gov. Spending", (0, 0, 0, 0, 1)),
    ("Hours", (0, 0, -1, 0, 0)),
    ("Real Compensation", (0, 0, 1, 0, -1)),
    ("Output per Hour", (0, 0, 1, 0, 0)),
    ("Unit Labor Cost", (0, 0, 0, 1, 1)),
    ("Industrial Production", (0, -1, 0, 0, 0)),
    ("Capacity Utilization", (0, 0, 0, 0, 0)),
    ("Employment", (-1, -1, 1, 0, 0)),
    ("Unemployment", (1, 1, -1, 0, -1)),
    ("Housing Starts", (0, 0, 0, 0, 0)),
    ("M&T Sales", (0, 0, 0, 0, 0)),
    ("M&T Inventories", (0, 0, 0, 0, 0)),
    ("PCE Index", (1, -1, -1, -1, 1)),
    ("GDP Deflator", (1, -1, -1, -1, 1)),
    ("CPI", (1, -1, -1, -1, 1)),
    ("PPI", (1, 0, -1, 0, 0)),
    ("FED Funds Rate", (1, 1, -1, 0, 0)),
    ("3-Month TB", (0, 1, 0, 0, 0)),
    ("1-Year TB", (0, 1, 0, 0, 0)),
    ("10-Year TB", (0, 1, 0, 0, 0)),
    ("BAA-GS10 Spread", (0, 0, -1, 1, 0)),
    ("Monetary Base", (0, -1, 0, 0, 0)),
    ("M2", (0, -1, 0, 0, 0)),
    ("S&P500", (-1, -1, 1, -1, 1)),
    ("Dow Jones", (-1, -1, 1, -1, 1)),
    ("US Dollar Index", (0, 1, 0, 0, 0)),
    ("Oil Price", (1, 0, 1, 0, 0)),
]

VARIABLES = tuple(name for name, _ in _ROWS)
IMPACT_SIGNS = np.array([signs for _, signs in _ROWS], dtype=int)
IMPACT_SIGNS.setflags(write=False)

# shock -> sign -> quarters
NARRATIVE_SIGNS = {
    "oil_supply": {1: ("1986Q3", "1988Q4", "2001Q3", "2016Q4"), -1: ("2001Q4", "2008Q4", "2014Q4")},
    "financial_risk": {1: ("2001Q3", "2008Q4"), -1: ("1998Q4", "1999Q4")},
    "government_spending": {
        1: ("1990Q4", "2001Q3", "2001Q4", "2002Q1", "2002Q3", "2003Q1", "2006Q2", "2007Q4"),
        -1: ("1986Q3", "1988Q4", "1989Q4", "1991Q4", "2008Q4", "2011Q3", "2013Q1"),
    },
}


def impact_sign_table() -> np.ndarray:
    return IMPACT_SIGNS.copy()


def narrative_entries() -> list[tuple[str, int, int]]:
    """``(quarter, shock index, sign)`` triples sorted by quarter then shock."""
    out = [
        (q, SHOCKS.index(shock), sign)
        for shock, by_sign in NARRATIVE_SIGNS.items()
        for sign, quarters in by_sign.items()
        for q in quarters
    ]
    return sorted(out)


def quarters(start: str = "1983Q1", end: str = "2019Q4") -> list[str]:
    y0, q0 = int(start[:4]), int(start[-1])
    y1, q1 = int(end[:4]), int(end[-1])
    out = []
    y, q = y0, q0
    while (y, q) <= (y1, q1):
        out.append(f"{y}Q{q}")
        y, q = (y, q + 1) if q < 4 else (y + 1, 1)
    return out


def restriction_set(data: Dataset, p: int) -> RestrictionSet:
    """The full scheme resolved against a dataset indexed by quarter labels."""
    entries = [(data.period_of(q, p), j, s) for q, j, s in narrative_entries()]
    return expand_signs(IMPACT_SIGNS).merged(shock_signs(entries, len(SHOCKS)))
