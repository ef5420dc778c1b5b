"""Fingerprint indexing with Gabor minutia descriptors and soft clustering."""

__version__ = "0.1.0"

from .descriptor import (  # noqa: E402
    DescriptorTransform, FeatureParams, GaborBankParams, Minutia, MinutiaKind, describe_all, gabor_feature,
    project, read_minutiae, sampling_points, write_minutiae,
)
from .errors import (  # noqa: E402
    ConflictError, DegenerateVectorError, EmptyTemplateError, EvaluationError, FormatError, FPIndexError,
    OutOfBoundsError, ParameterError, TrainingError, UnknownSubjectError,
)
from .evaluate import PrErCurve, bench_search, pr_er_curve  # noqa: E402
from .gallery import Gallery, SearchResult, enroll, search  # noqa: E402
from .imaging import EnhanceParams, GrayImage, dog_filter, enhance, local_normalize, read_pgm, write_pgm  # noqa: E402
from .indexvec import IndexVector, build_index, index_vector, membership  # noqa: E402
from .template import MatchGates, Template, build_super_template, correspond, merge  # noqa: E402
from .training import (  # noqa: E402
    Codebook, compose_transform, fit_codebook, fit_lda, fit_pca, load_codebook, load_transform,
    save_codebook, save_transform, train_models,
)
