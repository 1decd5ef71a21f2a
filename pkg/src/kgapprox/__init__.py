"""Approximate aggregate queries over knowledge graphs via semantic-aware sampling."""

from .accuracy import (
    EstimateReport,
    Session,
    blb_moe,
    bootstrap_sigma,
    configure_delta,
    normal_critical,
    prepare_plan,
    refine_error_bound,
    run_query,
    start_session,
    termination_met,
)
from .estimation import (
    GreedyValidator,
    ValidatedSample,
    estimate,
    estimate_grouped,
    validate_answer,
    validate_sample,
)
from .kg_store import (
    BoundedRegion,
    GeneratorSpec,
    KnowledgeGraph,
    bounded_region,
    generate_synthetic_kg,
    load_graph,
    resolve_specific_node,
)
from .oracle import enumerate_exact, exact_query
from .query import AggregateQuery, EngineConfig, QueryGraph, load_query, parse_query
from .sampler import (
    answer_distribution,
    build_transition_model,
    chain_sample,
    draw_sample,
    extract_answer_distribution,
    intersect_samples,
    stationary_distribution,
)
from .semantics import (
    EmbeddingTable,
    ExplicitTable,
    answer_similarity,
    load_embeddings,
    load_simtable,
    path_similarity,
)

__version__ = "0.1.0"
