"""Self-motion coordinates for redundant serial manipulators.

Kinematics/dynamics of planar and spatial chains, metric-weighted null-space
geometry, exact orthogonal-foliation charts grown by gradient flow, learned
quasi-orthogonal coordinates, and the controllers/simulations that exercise
them.
"""

__version__ = "0.1.0"

from .chains import (
    JointState,
    KinematicChain,
    TaskMap,
    anthro7,
    forward_kinematics,
    forward_kinematics_batch,
    load_chain,
    planar_chain,
    singularity_margin,
    task_jacobian,
    task_jacobian_batch,
)
from .dynamics import (
    coriolis_matrix,
    gravity_vector,
    kinetic_energy,
    mass_matrix,
    mass_matrix_batch,
    potential_energy,
    total_energy,
)
from .validation import ConfigError, NumericError, SingularityError
from .geometry import (
    Metric,
    PlaneStack,
    generalized_pseudoinverse,
    involutivity_residual,
    null_space_projector,
    plane_stack_normals,
    stacked_inverse,
)
from .meshing import extract_level_curve, extract_level_surface, export_mesh
from .charts import (
    BaseManifoldChart,
    angle_chart,
    harmonic_parametrization,
    load_chart,
    save_chart,
)
from .growing import gradient_flow_pull, grown_coordinates
from .network import (
    MlpParams,
    forward,
    init_params,
    input_jacobian,
    load_params,
    save_params,
)
from .training import TrainingConfig, batch_loss, orthogonality_cosines, train
from .evaluation import AngleStats, evaluate_angles, exclusion_mask
from .control import (
    ImpedanceGains,
    ProjectionGains,
    TrajectorySpec,
    pd_plus_controller,
    prefilter,
    projection_baseline_torque,
    sampled_reference,
    stacked_maps,
)
# NB: the run loop itself stays at selfmotion.simulate.simulate so the
# module name keeps resolving to the module
from .simulate import (
    SimulationLog,
    acceleration_decomposition,
    kinematic_velocity_control,
)
from .coordinates import (
    GrownCoordinates,
    LearnedCoordinates,
    PlaneStackCoordinates,
    resolve_metric,
)
