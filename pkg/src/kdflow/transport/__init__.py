from .channel import (
    DEFAULT_CAPACITY,
    MIN_CAPACITY,
    Channel,
    ChannelCorrupted,
    ChannelError,
    ChannelExistsError,
    ChannelMapError,
    ChannelNotFoundError,
    ChannelStats,
    ChannelTimeout,
    FrameView,
    OversizeError,
    ViewLimitError,
    channel_attach,
    channel_create,
    channel_name,
    frame_for,
)
from .frame import (
    FRAME_MAGIC,
    Frame,
    FrameError,
    Opcode,
    PayloadKind,
    WireDType,
    control_frame,
    decode_frame,
    decode_header,
    encode_frame,
    encode_header,
    tensor_frame,
    tokens_frame,
)
from .volume import comm_volume
