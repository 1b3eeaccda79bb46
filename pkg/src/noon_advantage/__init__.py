"""Fisher-information analysis of a lossy, fibered two-photon N00N interferometer."""

__version__ = "0.1.0"

from .calibration import (  # noqa: E402
    CalibrationRecord,
    LossBudget,
    build_loss_budget,
    classical_arm_transmissions,
    consistency_audit,
    db_to_transmission,
    reference_budget,
    transmission_to_db,
)
from .errors import ConsistencyError, DomainError, FitError, SingularFisherWarning  # noqa: E402
from .fisher import (  # noqa: E402
    AdvantageReport,
    advantage_closed_form,
    advantage_ratio,
    advantage_report,
    closed_form_f1_max,
    closed_form_f2_max,
    fisher_curve,
    fisher_information,
    max_fisher,
    scenario_report,
    sub_sql_check,
)
from .interferometer import (  # noqa: E402
    EntangledPairSpec,
    NoonProbe,
    OutcomeDistribution,
    Visibility,
    coincidence_distribution,
    distinguishable_franson_distribution,
    noon_output_distribution,
    single_photon_distribution,
    transcribe_polarization_to_path,
    visibility_from_relative_loss,
)
