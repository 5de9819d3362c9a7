__version__ = "0.1.0"
__title__ = "lob-cusum"

from .errors import LobCusumError  # noqa: F401
from .ingest import parse_book_csv, parse_trades_csv, synth_book  # noqa: F401
from .trades_through import extract, to_marked_events  # noqa: F401
from .hawkes import HawkesParams, fit_mle, log_likelihood, simulate  # noqa: F401
from .diagnostics import goodness_of_fit, residuals  # noqa: F401
from .scale import (  # noqa: F401
    arl_decrease,
    arl_increase,
    beta_of_rho,
    calibrate_threshold,
)
from .cusum import CusumConfig, CusumDetector, run_two_sided  # noqa: F401
