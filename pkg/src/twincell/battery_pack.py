"""The shipped battery-pack cell profile.

One place for everything specific to the reference cell: the scene
loader, the disturbance model calibrated against floor recordings, the
frozen seeds that reproduce the reference runs, and the layout
refinement that came out of the first improvement round.
"""

from __future__ import annotations

from .geometry import Pose, ShapeKind, ShapePrimitive, PlacedShape
from .scene import Scene, load_case_scene, relocate_resource
from .simulate import VariationModel
from .trajectory import VirtualWall

# reference seeds; each pins one reproducible run used as a baseline
SIM_SEED = 1  # simulate_shift over 8 h -> 326 completed
EMULATOR_SEED = 37  # 30 assemblies -> 14 force trips, 8 long waits

# moves per robot task in the generated program; drift here means the
# motion planner changed and the disturbance calibration is stale
MOVE_COUNTS = (
    ("place_housing", 6),
    ("place_cell_a", 6),
    ("place_cell_b", 6),
    ("drive_screws", 18),
)

FORCE_TRIP_PROBABILITY = 14.0 / (30 * 36)  # per guarded move
DURATION_SIGMA = 0.08  # lognormal spread on task durations
SWITCH_DELAY_SHIFT_S = 0.05  # operator reaction floor
SWITCH_DELAY_MEAN_S = 0.1

REFINED_FIXTURE_X = 540.0  # was 620; pulled toward the robot
SAFETY_WALL = VirtualWall((640.0, 0.0, 0.0), (1.0, 0.0, 0.0))

# operator lean-in zone over the fixture far edge, hypothesized from
# the recorded force trips; used to vet layouts before changing the cell
ENCROACHMENT_ZONE = PlacedShape(
    "encroachment_zone",
    ShapePrimitive(ShapeKind.BOX, (120.0, 200.0, 200.0)),
    Pose((760.0, -150.0, 100.0)),
)


def load() -> Scene:
    return load_case_scene()


def variation() -> VariationModel:
    """Disturbance model calibrated against the reference recordings."""
    return VariationModel(
        duration_sigma=DURATION_SIGMA,
        trip_probability=FORCE_TRIP_PROBABILITY,
        switch_delay_shift_s=SWITCH_DELAY_SHIFT_S,
        switch_delay_mean_s=SWITCH_DELAY_MEAN_S,
        move_counts=MOVE_COUNTS,
    )


def refined_layout(scene: Scene) -> Scene:
    """Fixtures pulled to the refined position, work carried along."""
    for fixture_id in ("fixture_a", "fixture_b"):
        fixture = scene.resource(fixture_id)
        p = fixture.pose.position
        scene = relocate_resource(
            scene, fixture_id, Pose((REFINED_FIXTURE_X, p[1], p[2]), fixture.pose.orientation)
        )
    return scene
