"""Desk-scale tools for separating Einsteinian no-signalling from the
distant-setting dependence of post-selected coincidence data."""

from .core import (ALICE, BOB, CountTable, DuplicateTimestampError, Event, PairedSample,
                   Setting, SettingPair, TimeTagSeries, WindowedSample, make_series)
from .inference import (FAIL_TO_REJECT, REJECT, UNRELIABLE_SHL, TestReport, estimate_chsh,
                        estimate_marginals, singles_deviation, test_cdmd, test_homogeneity,
                        test_nosignalling)
from .pairing import CoincidenceConfig, bin_windows, pair_nearest, postselect, sweep

__version__ = "0.1.0"
