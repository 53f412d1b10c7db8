"""Online learning on haphazard streams with a packet of per-feature recurrent cells."""
from .cells import CellKind, CellSpec, cell_backward, cell_forward
from .errors import CapacityError, ConfigurationError, ParseError, TrainingError
from .evaluation import MetricRecord, MetricReport, run_prequential
from .normalize import Normalizer, NormKind
from .packet import PacketConfig, PacketModel
from .streams import Instance

__all__ = [
    "CapacityError", "CellKind", "CellSpec", "ConfigurationError", "Instance", "MetricRecord",
    "MetricReport", "NormKind", "Normalizer", "PacketConfig", "PacketModel", "ParseError",
    "TrainingError", "cell_backward", "cell_forward", "run_prequential",
]
__version__ = "0.1.0"
