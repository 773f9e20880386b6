from .captions import (
    EMPTY,
    SCENE_SEP,
    TERMINAL,
    Caption,
    CaptionError,
    CaptionParseError,
    EnvDescriptor,
    ParsedCaption,
    UnknownLabelError,
    parse_caption,
    render_caption,
    scene_label,
    scene_objects,
)
from .client import (
    FallbackOperator,
    LlmOperator,
    OperatorTimeoutError,
    OperatorTransportError,
    RemoteEndpoint,
    RetryPolicy,
    llm_operator,
)
from .operator import (
    RULES,
    SYSTEM_PROMPT,
    OperatorContext,
    OperatorError,
    OperatorResult,
    OperatorSchemaError,
    TaskSpec,
    build_messages,
    rule_operator,
    validate_operator_output,
)
