from .datasets import (
    CLASS_NAMES,
    DatasetIndex,
    DatasetLayoutError,
    Entry,
    ImageShapeError,
    PairIndex,
    SplitSpec,
    UnpairedFilesError,
    batch_iter,
    index_dataset1,
    load_image,
    load_images,
    normalize_image,
    pair_index,
    split_pairs,
    stratified_split,
)
from .npy import (
    BadMagicError,
    MalformedHeaderError,
    NpyArray,
    NpyFormatError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
    encode_npy,
    parse_npy,
    read_npy,
    read_npy_header,
    write_npy,
)
from .synth import NOISE_SIGMA, block_average, synth_dataset1, synth_lens, synth_sr_pairs

__all__ = [
    "BadMagicError",
    "CLASS_NAMES",
    "DatasetIndex",
    "DatasetLayoutError",
    "Entry",
    "ImageShapeError",
    "MalformedHeaderError",
    "NOISE_SIGMA",
    "NpyArray",
    "NpyFormatError",
    "PairIndex",
    "SplitSpec",
    "TruncatedPayloadError",
    "UnpairedFilesError",
    "UnsupportedDtypeError",
    "UnsupportedVersionError",
    "batch_iter",
    "block_average",
    "encode_npy",
    "index_dataset1",
    "load_image",
    "load_images",
    "normalize_image",
    "pair_index",
    "parse_npy",
    "read_npy",
    "read_npy_header",
    "split_pairs",
    "stratified_split",
    "synth_dataset1",
    "synth_lens",
    "synth_sr_pairs",
    "write_npy",
]
