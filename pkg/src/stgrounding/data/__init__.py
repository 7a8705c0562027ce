from .augment import augment_sample
from .dataset import Batch, Sample, collate, load_split, load_vocabulary
from .media import (AnnotationRecord, FormatError, ValidationError, read_annotation,
                    read_frames, write_annotation, write_frames)
from .synthetic import (GenerationError, SceneParams, SyntheticScene, generate_synthetic_dataset,
                        make_sample, query_vocabulary, subsample_indices)
