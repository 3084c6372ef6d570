"""Overlap-capable human-chatbot chat: engine, protocol, analytics, tooling."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    ConversationLog,
    DialogueAct,
    Message,
    PolicyDecision,
    Role,
    SessionConfig,
    TimingDecision,
)
