"""Darcy-Boussinesq convection in layered porous media, with a thin-layer
limit verification harness."""

from .geometry import (
    BackgroundProfile,
    DeltaAdmissibility,
    GeometryError,
    Grid,
    LayerStack,
    ThinFamily,
    build_family,
    build_grid,
    build_profile,
    check_delta,
)
from .fields import (
    ScalarField,
    SpectralSlice,
    VectorField,
    divergence,
    field_l2,
    ft_forward,
    ft_inverse,
    norms,
    read_field,
    vector_l2,
    write_field,
)
from .pressure import (
    SolverError,
    darcy_velocity,
    pressure_stability_check,
    solve_pressure,
)
from .transport import (
    CFLError,
    DivergenceError,
    InitSpec,
    SimState,
    Stepper,
    TimeConfig,
    TrajectoryRecord,
    build_initial,
    cfl_dt,
    initial_state,
    read_record,
    simulate,
    step,
    write_record,
)
from .estimates import (
    AuditResult,
    EmbedConstants,
    EnergyReport,
    absorbing_time,
    audit_h1,
    audit_l2,
    constants,
    l2_envelope,
)
from .thinlimit import (
    AttractorSample,
    ConvergenceRecord,
    RunSetup,
    SweepResult,
    coefficient_difference_norms,
    fit_rate,
    sample_attractor,
    semidistance,
    sweep,
    to_reference,
)
from .cli import ConfigError, RunConfig, dispatch, main, parse_config, serialize_config

__version__ = "0.1.0"
