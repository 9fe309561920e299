from .manifest import (
    MANIFEST_HEADER,
    DuplicateFrameError,
    EchoLabelError,
    EchoSplitError,
    FrameRecord,
    Fold,
    Manifest,
    ManifestError,
    ManifestFormatError,
    SubjectSplitError,
    UnknownViewError,
    batch_iter,
    load_manifest,
    split_folds,
    subsample_per_class,
    write_manifest,
)
from .pgm import PGMError, read_pgm, write_pgm
from .synth import PAPER_SUBJECTS, paper_shaped_spec, synth_generate, uniform_spec
from .frames import FrameSet, load_frames
