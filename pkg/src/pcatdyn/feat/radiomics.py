"""The eight named radiomics features."""

from __future__ import annotations

import numpy as np

from ..volgrid import LabelMask, VolumeGrid
from .firstorder import _region, discretize, moments
from .shape import shape_from_points
from .texture import column_nonuniformity, glcm, gldm, glszm, bin_volume, idmn
from .wavelet import haar_swt3, roi_bbox

RADIOMICS_NAMES = (
    "original-shape-Elongation",
    "original-shape-Flatness",
    "wavelet-LLH-firstorder-Mean",
    "wavelet-LHL-firstorder-Kurtosis",
    "wavelet-LLL-gldm-Idmn",  # IDMN over the GLDM (gray level x dependence) matrix
    "wavelet-HHH-glszm-SizeZoneNonUniformityNormalized",
    "original-glcm-Idmn",
    "original-gldm-DependenceNonUniformityNormalized",
)


def radiomics8(v: VolumeGrid, pcat: LabelMask, code: int) -> dict[str, float]:
    sel = _region(v, pcat, code)
    box = roi_bbox(sel)
    bsel = sel[box]
    bands = haar_swt3(v.values[box])
    elong, flat = shape_from_points(v.geometry.physical_coords(np.argwhere(sel)))

    d_org = discretize(v.values[sel])
    b_org = bin_volume(sel, d_org)
    d_lll = discretize(bands["LLL"][bsel])
    d_hhh = discretize(bands["HHH"][bsel])
    return {
        RADIOMICS_NAMES[0]: elong,
        RADIOMICS_NAMES[1]: flat,
        RADIOMICS_NAMES[2]: float(bands["LLH"][bsel].mean()),
        RADIOMICS_NAMES[3]: moments(bands["LHL"][bsel])[3],
        RADIOMICS_NAMES[4]: idmn(gldm(bin_volume(bsel, d_lll), 16), 16),
        RADIOMICS_NAMES[5]: column_nonuniformity(glszm(bin_volume(bsel, d_hhh), 16)),
        RADIOMICS_NAMES[6]: idmn(glcm(b_org, 16), 16),
        RADIOMICS_NAMES[7]: column_nonuniformity(gldm(b_org, 16)),
    }
