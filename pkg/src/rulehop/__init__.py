"""Multi-hop knowledge-graph question answering with mined logic rules.

The toolkit mines relation-chain rules from walks between question topics
and answers, trains complex-valued link-prediction embeddings, executes
rules through the graph and the embedding space with fuzzy path
probabilities, and reranks the merged answers, optionally through a
pluggable LLM completion backend with deterministic fallbacks.
"""

from .benchmark import (
    FamilyBenchmark,
    FamilyBenchmarkConfig,
    generate_family_benchmark,
    write_benchmark,
)
from .embeddings import (
    CheckpointError,
    ComplexEmbeddings,
    GradientTables,
    TrainConfig,
    init_embeddings,
    load_embeddings,
    loss_and_grad,
    raw_score,
    save_embeddings,
    score_all_tails,
    sigmoid,
    step_probability,
    train,
)
from .evaluation import (
    DatasetSplit,
    EvalMetrics,
    EvalReport,
    QAParseError,
    accuracy,
    evaluate,
    hits_at_1,
    load_qa,
    prf1,
    run_ablation,
)
from .graph import (
    KnowledgeGraph,
    TripleParseError,
    load_graph,
    load_triples,
    save_graph,
)
from .llm import (
    BackendError,
    CompletionBackend,
    HttpBackend,
    InstructionRecord,
    MockBackend,
    NullBackend,
    RuleParseError,
    RuleSelection,
    build_generation_prompt,
    build_rerank_prompt,
    build_selection_prompt,
    export_instruction_data,
    parse_rules,
    prompt_fingerprint,
    rerank,
    select_rules,
    serialize_rule,
)
from .mining import (
    LogicRule,
    MiningConfig,
    QAExample,
    QuestionCluster,
    cluster_questions,
    enumerate_walks,
    load_rules,
    mask_topic,
    mine_rules,
    rule_probability,
    sample_walks,
    save_rules,
)
from .pipeline import Pipeline, PipelineResult
from .retrieval import (
    BeamConfig,
    ReasoningPath,
    ScoredAnswer,
    beam_search,
    expand,
    make_path,
    path_probability,
    retrieve,
)

__version__ = "0.1.0"
