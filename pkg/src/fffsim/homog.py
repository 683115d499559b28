"""Rule-of-mixtures properties for coarse elements over air-filled infill."""
from __future__ import annotations

from .config import Material


def volumetric_capacity(density: float, specific_heat: float) -> float:
    if density <= 0 or specific_heat <= 0:
        raise ValueError("density and specific heat must be positive")
    return density * specific_heat


def compute_alpha(v_pol: float, v_air: float) -> float:
    """Polymer volume fraction of the printed part."""
    if v_pol < 0 or v_air < 0:
        raise ValueError("volumes must be non-negative")
    total = v_pol + v_air
    if total <= 0:
        raise ValueError("polymer and air volumes are both zero")
    return v_pol / total


def effective_material(alpha: float, air: Material, pol: Material) -> Material:
    """Homogenized medium carried as (density=1, specific_heat=C_eff).

    Endpoints return the pure materials unchanged.
    """
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1:
        return pol
    if alpha == 0:
        return air
    k_eff = (1 - alpha) * air.conductivity + alpha * pol.conductivity
    c_eff = (1 - alpha) * volumetric_capacity(air.density, air.specific_heat) \
        + alpha * volumetric_capacity(pol.density, pol.specific_heat)
    return Material(1.0, c_eff, k_eff)


def assign_homogenized(mesh, elements, alpha: float, air: Material, pol: Material) -> Material:
    """Give every listed coarse element the part-level effective medium.

    The exact local polymer/air mix of the merged cells is ignored on purpose;
    fine layers keep their per-cell materials.
    """
    from .mesh import MAT_HOMOGENIZED, MAT_POLYMER

    eff = effective_material(alpha, air, pol)
    mat_id = MAT_POLYMER if alpha == 1 else MAT_HOMOGENIZED
    for e in elements:
        mesh.material[e] = mat_id
        mesh.conductivity[e] = eff.conductivity
        mesh.capacity[e] = eff.volumetric_capacity
    return eff
