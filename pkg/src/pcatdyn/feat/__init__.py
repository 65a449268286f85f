"""Hand-crafted and radiomics features over PCAT voxel sets."""

from .drift import FEATURE_NAMES, FeatureDriftTable, FeatureVector, drift_table, extract
from .firstorder import HANDCRAFTED_NAMES, DiscretizedRoi, discretize, handcrafted
from .radiomics import RADIOMICS_NAMES, radiomics8
from .shape import shape_features
from .texture import TextureMatrices, texture_features, texture_matrices
from .wavelet import SUBBANDS, haar_swt3, wavelet3d

__all__ = [
    "FEATURE_NAMES",
    "HANDCRAFTED_NAMES",
    "RADIOMICS_NAMES",
    "SUBBANDS",
    "DiscretizedRoi",
    "FeatureDriftTable",
    "FeatureVector",
    "TextureMatrices",
    "discretize",
    "drift_table",
    "extract",
    "handcrafted",
    "haar_swt3",
    "radiomics8",
    "shape_features",
    "texture_features",
    "texture_matrices",
    "wavelet3d",
]
