"""No-signaling tests for Bell-experiment coincidence counts."""

from .nosig import (
    ALLOWED,
    FORBIDDEN,
    CausalGraph,
    EfficiencyModel,
    EqualitySpec,
    TestBatteryReport,
    three_party_battery,
    two_party_battery,
)
from .stats import Chi2Result, bonferroni, chi2_pvalue, pearson_chi2, weighted_chi2
from .tables import CountTable, MarginalPattern, Party, PartyLayout, marginalize

__version__ = "0.1.0"

__all__ = [
    "ALLOWED",
    "FORBIDDEN",
    "CausalGraph",
    "Chi2Result",
    "CountTable",
    "EfficiencyModel",
    "EqualitySpec",
    "MarginalPattern",
    "Party",
    "PartyLayout",
    "TestBatteryReport",
    "bonferroni",
    "chi2_pvalue",
    "marginalize",
    "pearson_chi2",
    "three_party_battery",
    "two_party_battery",
    "weighted_chi2",
]
