from .gop import FrameSpec, GopStructure, all_intra, low_delay, random_access
from .pipeline import (
    PipelineError,
    blend,
    frame_from_outputs,
    reconstruct,
    to_yuv420,
    warp,
    yuv420_mse,
)
