"""fleetscope: map structured-hostname CDN fleets and estimate their traffic.

Discovery enumerates grammar-generated hostnames and resolves them;
validation cross-checks claimed locations against geo/ASN snapshots and
RTT proximity; the probe engine samples IPv4 ID counters over ICMP; the
estimator turns ID deltas into packet rates; analytics aggregates them.
A simulated fleet with exact ground truth backs the whole test suite.
"""

__version__ = "0.1.0"

from .names import (  # noqa: F401
    MalformedName,
    ServerName,
    Wordlists,
    enumerate_candidates,
    format_server_name,
    parse_server_name,
)
from .ipid import (  # noqa: F401
    IdBehavior,
    RateEstimate,
    ambiguity_bound,
    detect_id_behavior,
    estimate_rate,
    series_estimates,
    wrap_corrected_delta,
)
