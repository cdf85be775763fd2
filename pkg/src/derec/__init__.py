"""derec: evidence-grounded claim verification.

Ingest claim/report corpora, embed claims and report sentences, retrieve
the most relevant evidence per claim with an exact (or clustered)
inner-product index, predict veracity with a trainable softmax head or a
remote classifier, and score/benchmark the whole pipeline.
"""

from .corpus import (
    Claim,
    Dataset,
    DatasetStats,
    EvidenceSentence,
    LabelScheme,
    Report,
    SCHEMES,
    SIX_CLASS,
    THREE_CLASS,
    ingest,
    label_distribution,
    save_dataset,
    segment,
    stats,
)
from .embed import (
    HashingTextEmbedder,
    ProviderInfo,
    RemoteEmbeddingProvider,
    embed_corpus,
    make_provider,
    normalize_rows,
    normalize_vector,
)
from .evaluate import (
    ConfusionMatrix,
    EvaluationReport,
    RuntimeReport,
    bench_scaling,
    confusion,
    measure_stages,
    score,
)
from .index import (
    ClusteredIndex,
    FlatIndex,
    SearchResult,
    brute_force_topk,
    build_index,
    load_index,
    save_index,
)
from .pipeline import profile_run, run_pipeline
from .retrieve import (
    EvidenceItem,
    EvidenceSet,
    retrieve_all,
    retrieve_evidence,
)
from .store import EmbeddingStore
from .verify import (
    ClassifierInput,
    RemoteClassifier,
    SoftmaxHead,
    VeracityPrediction,
    build_input,
    cross_entropy_grad,
    cross_entropy_loss,
    load_model,
    pool_features,
    save_model,
    softmax,
)

__version__ = "0.1.0"
