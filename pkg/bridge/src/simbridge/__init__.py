"""simbridge: server side of the remote detection-score oracle protocol.

A bridge receives camouflage textures plus camera transforms over
newline-delimited JSON/TCP and answers one detection score per transform.
The ``carla`` backend drives the CARLA simulator plus a real detector
(reference code, not covered by CI); the ``mock`` backend is a
deterministic test double scoring textures from their block statistics.
"""

from .config import BridgeConfig, CarlaSettings
from .mock_backend import MockBackend, mock_score
from .server import BridgeServer, serve

__version__ = "0.1.0"

__all__ = [
    "BridgeConfig",
    "BridgeServer",
    "CarlaSettings",
    "MockBackend",
    "mock_score",
    "serve",
]
