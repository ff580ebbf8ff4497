"""Extraction front-end for the correspondence scoring toolkit.

Turns a directory of posed depth captures into a scene directory the
toolkit consumes: per-frame feature and depth tensors in its binary
container plus a ``scene.json`` manifest. Talks to the toolkit only
through those documented file formats.
"""

from .errors import (
    ExtractError,
    InputError,
    RegistryError,
    ResolutionError,
    ShapeMismatchError,
)
from .inputs import FrameInputs, read_frames, read_intrinsics
from .job import ExtractionJob, extract
from .models import available_models, default_projection, get_model
from .tensor_writer import tensor_bytes, write_tensor_file
from .cli import run_cli

__version__ = "0.1.0"
