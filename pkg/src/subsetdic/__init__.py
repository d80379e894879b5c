"""Scalable 2D local-subset digital image correlation.

Pipeline: a multi-window FFT correlation pass bounds large displacements
and hands per-subset integer guesses to a reliability-guided subset
optimizer, which refines them to subpixel precision with a Levenberg-
Marquardt solver on spline-interpolated intensities; strain fields come
from local polynomial fits of the displacement field.
"""

from .errors import (
    AllInvalid, BadMagic, BorderTooLarge, ConfigError, DegenerateSubset,
    DicError, EmptyGrid, GridTooSmall, ImageIoError, ImageTooSmall, NoCrossing,
    NoMatch, NonInvertibleSpec, OutOfDomain, ParseError, RankDeficient,
    SeedFailed, SingularDeformation, TooFewEntries, TruncatedFile,
    UnsupportedFormat, VersionMismatch,
)
from .image import GrayImage, gray_image_from_array, load_image, save_pgm
from .params import (
    CostKind, DicParams, MethodKind, PointStatus, ShapeKind, StrainBasis,
    StrainFormulation, StrainParams,
)
from .roi import (
    RoiMask, SubsetGrid, build_subset_grid, roi_exclude_border,
    roi_from_mask_image, roi_from_rects,
)
from .bspline import SplineCoefficients, prefilter
from .fftcc import (
    InitField, WindowPyramid, mad_filter, multiwindow_displacement,
    plan_window_pyramid,
)
from .synth import (
    DeformationFieldSpec, FieldKind, add_noise, deform_image, gen_speckle,
    star_crest_positions, star_period,
)
from .optimizer import (
    ShapeParams, SubsetData, SubsetResult, cost, lm_minimize, warp, zncc,
)
from .rgdic import DicResult, correlate_2d, flag_unconverged
from .strain import (
    StrainField, calculate_strain_field, deformation_gradient, fit_window,
    strain_tensor,
)
from .results_io import (
    DicImport, ResultFileHeader, StrainImport, import_2d, import_strain,
    read_dic_binary, read_dic_csv, read_strain_csv, write_dic_binary,
    write_dic_csv, write_strain_csv,
)
from .metrology import (
    MetrologyEntry, MetrologyReport, mei, mei_summary, noise_floor,
    spatial_resolution, star_benchmark,
)

__version__ = "0.1.0"
