from .errors import IclForgeError
from ._iclforge import (
    Dataset,
    EmbeddingMatrix,
    Example,
    NeighborCluster,
    NeighborIndex,
    PlantedCorpus,
    bleu,
    brute_force_knn,
    corpus_bleu,
    cosine_similarity,
    exact_match,
    global_rank_filter,
    greedy_map_logdet,
    inject_irrelevant_noise,
    load_dataset,
    load_embeddings,
    lpr_filter,
    make_planted_corpus,
    normalize_answer,
    parse_dataset_jsonl,
    perplexity,
    select_dpp,
    select_topk,
    split_pool,
)

__version__ = "0.3.0"
