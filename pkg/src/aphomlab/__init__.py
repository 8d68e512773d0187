"""aphomlab: a numerical laboratory for almost-periodic parabolic homogenization."""

from . import errors
from .apfield import (
    AlmostPeriodicityReport,
    CoefficientTensorField,
    FrequencyAtom,
    SamplingPolicy,
    ScaledField,
    almost_periodicity_report,
    field_from_json,
    field_to_json,
    mean_value,
    rho_hat,
    scalar_field_1d,
    theta_hat,
    verify_ellipticity,
)

__version__ = "0.1.0"
