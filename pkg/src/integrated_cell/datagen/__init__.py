from .preprocess import align, max_project, modal_intensity, normalize_channel, preprocess
from .split import PUBLISHED_SPLIT, published_train_fractions, split
from .synth import STRUCTURES, SyntheticCellSpec, generate_corpus, masks_from_image

__all__ = [
    "PUBLISHED_SPLIT",
    "STRUCTURES",
    "SyntheticCellSpec",
    "align",
    "generate_corpus",
    "masks_from_image",
    "max_project",
    "modal_intensity",
    "normalize_channel",
    "preprocess",
    "published_train_fractions",
    "split",
]
