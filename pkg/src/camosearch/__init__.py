"""camosearch: mosaic camouflage textures and black-box adversarial search.

The package splits into small layers:

* ``textures``   - pattern/texture types, enlarge-and-repeat and bilinear
  construction, PNG import/export.
* ``metrics``    - camera-transform grids and the S_avg / P_0.5 report.
* ``oracles``    - the detection-score oracle interface plus synthetic
  oracles for desk-scale experiments.
* ``remote``     - TCP client for a simulator-backed oracle.
* ``search``     - the elite-pool discrete search loop.
* ``checkpoint`` - resumable run state.
* ``cli``        - the ``camosearch`` command-line front end.
"""

from .metrics import (
    CameraTransform,
    EvalReport,
    compute_report,
    render_report,
    testing_grid,
    training_grid,
)
from .oracles import (
    ConstantOracle,
    DetectionOracle,
    FrequencyPreferenceOracle,
    OracleQuery,
    OracleResponse,
    PlantedWeaknessOracle,
)
from .remote import RemoteOracle
from .search import (
    Candidate,
    OracleFailure,
    SearchConfig,
    SearchTrace,
    SolidPool,
    clip,
    directed_delta,
    global_explore,
    inner_search,
    mutate_scatter,
    pattern_digest,
    random_delta,
    random_pattern,
    run_search,
)
from .textures import (
    ErConfig,
    Pattern,
    Texture,
    bilinear_resize,
    enlarge,
    enlarge_and_repeat,
    er_construct,
    load_pattern,
    load_texture,
    repeat,
    save_png,
)

__version__ = "0.1.0"

__all__ = [
    "CameraTransform",
    "Candidate",
    "ConstantOracle",
    "DetectionOracle",
    "ErConfig",
    "EvalReport",
    "FrequencyPreferenceOracle",
    "OracleFailure",
    "OracleQuery",
    "OracleResponse",
    "Pattern",
    "PlantedWeaknessOracle",
    "RemoteOracle",
    "SearchConfig",
    "SearchTrace",
    "SolidPool",
    "Texture",
    "bilinear_resize",
    "clip",
    "compute_report",
    "directed_delta",
    "enlarge",
    "enlarge_and_repeat",
    "er_construct",
    "global_explore",
    "inner_search",
    "load_pattern",
    "load_texture",
    "mutate_scatter",
    "pattern_digest",
    "random_delta",
    "random_pattern",
    "render_report",
    "repeat",
    "run_search",
    "save_png",
    "testing_grid",
    "training_grid",
]
