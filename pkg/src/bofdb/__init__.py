"""Embedded bag-of-features image indexing and classification engine."""

from .encode import BofHistogram, encode_histogram, hash_descriptor, normalize_l1
from .features import (
    DescriptorSet,
    ExtractorParams,
    Image,
    Keypoint,
    decode_image,
    export_descriptors,
    extract_descriptors,
    import_descriptors,
)
from .pipeline import (
    LearnSpec,
    benchmark_table1,
    classify_bytes,
    generate_dataset,
    ingest_and_classify,
    learn,
    load_trained,
)
from .query import execute, parse, print_ast
from .store import Store, open_store
from .svm import SvmConfig, SvmModel, predict_class, train_binary, train_one_vs_rest
from .vocab import Dictionary, assign_word, kmeans_train, sse

__version__ = "0.1.0"
