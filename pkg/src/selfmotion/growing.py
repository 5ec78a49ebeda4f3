"""Growing exact coordinates: pull points onto the base leaf along the
metric gradient flow of the task error, then read the chart there.

The flow q̇ = (x₀ − h(q)) ∇_A h(q) decreases |h − x₀| monotonically and
converges onto the level set; ξ(q) is the chart value at the pulled point,
constant along each flow line by construction.
"""

import numpy as np

from .chains import forward_kinematics, task_jacobian
from .geometry import metric_gradient
from .validation import NumericError, SingularityError, as_vector

_DT0 = 1e-2
_DT_MAX = 0.2
_DT_MIN = 1e-9


def gradient_flow_pull(chain, task_map, metric, x0, q_start, *,
                       stop_residual=1e-8, max_steps=20000, return_log=False):
    """Integrate the task-error gradient flow from q_start onto {h = x₀}.

    Classic 4th-order fixed-step integration, base step 1e-2, halving when a
    step fails to shrink the residual and growing back while it does.

    Raises:
        SingularityError: the flow stalls where the task gradient vanishes.
        NumericError: max-step budget exceeded (reports the last residual).
    """
    if task_map.dim(chain) != 1:
        raise ValueError("gradient flow pulling is defined for scalar tasks")
    x0 = float(np.atleast_1d(x0)[0])
    q = as_vector(q_start, chain.n, "q_start").copy()

    def rhs(qq):
        err = x0 - forward_kinematics(chain, qq, task_map)[0]
        grad = metric_gradient(task_jacobian(chain, qq, task_map)[0], metric, qq)
        return err * grad, err

    dt = _DT0
    _, err = rhs(q)
    log = [abs(err)]
    for _ in range(max_steps):
        if abs(err) < stop_residual:
            break
        k1, _ = rhs(q)
        k2, _ = rhs(q + 0.5 * dt * k1)
        k3, _ = rhs(q + 0.5 * dt * k2)
        k4, _ = rhs(q + dt * k3)
        q_new = q + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        _, err_new = rhs(q_new)
        if abs(err_new) >= abs(err):
            dt *= 0.5
            if dt < _DT_MIN:
                grad = metric_gradient(task_jacobian(chain, q, task_map)[0], metric, q)
                if np.linalg.norm(grad) < 1e-6:
                    raise SingularityError(
                        "gradient flow stalled where the task gradient vanishes",
                        margin=float(np.linalg.norm(grad)))
                raise NumericError(
                    f"gradient flow step collapsed at residual {abs(err):.2e}")
            continue
        q, err = q_new, err_new
        log.append(abs(err))
        dt = min(dt * 1.5, _DT_MAX)
    else:
        raise NumericError(
            f"gradient flow exceeded {max_steps} steps; last residual {abs(err):.2e}")
    return (q, np.asarray(log)) if return_log else q


def grown_coordinates(chart, chain, metric, q):
    """Coordinates ξ(q): pull q onto the base leaf, interpolate the chart.

    Accepts a single configuration (n,) or a batch (K, n); returns (r,) or
    (K, r) accordingly.
    """
    from .chains import TaskMap

    task_map = TaskMap(chart.mesh.task_selector)
    x0 = chart.mesh.task_value
    Q = np.atleast_2d(np.asarray(q, float))
    pulled = np.empty_like(Q)
    for k, row in enumerate(Q):
        pulled[k] = gradient_flow_pull(chain, task_map, metric, x0, row)
    xi = chart.lookup(pulled)
    return xi if np.asarray(q).ndim > 1 else np.asarray(xi).reshape(-1)
