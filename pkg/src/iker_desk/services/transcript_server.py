"""
Transcript replay service
Answers the planner's chat-completion contract from recorded transcripts, so the live client can
be exercised end to end without a model endpoint
"""

import logging
import threading
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from ..planner.backends import DONE_PROGRAM, load_transcript

logger = logging.getLogger(__name__)


class ChatMessage(BaseModel):
    role: str
    content: str


class ChatRequest(BaseModel):
    model: str
    messages: List[ChatMessage]


def _completion(text: str, model: str) -> Dict[str, Any]:
    return {
        "object": "chat.completion",
        "model": model,
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
    }


class TranscriptService:
    """Serves recorded responses in order; once exhausted every answer is `done = true`"""

    def __init__(self, transcript: Dict[str, Any], config_id: Optional[int] = None):
        self.transcript = transcript
        self.responses: List[Dict[str, Any]] = [
            ex["response"] for ex in transcript["exchanges"]
            if config_id is None or ex.get("config_id") == config_id
        ]
        self.cursor = 0
        self.requests_served = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Union[str, Path], config_id: Optional[int] = None) -> "TranscriptService":
        return cls(load_transcript(path), config_id)

    def next_response(self, model: str) -> Dict[str, Any]:
        with self._lock:
            self.requests_served += 1
            if self.cursor < len(self.responses):
                response = self.responses[self.cursor]
                self.cursor += 1
                return response
        logger.info("Transcript exhausted; answering done")
        return _completion(DONE_PROGRAM, model)

    def reset(self) -> None:
        with self._lock:
            self.cursor = 0

    def status(self) -> Dict[str, Any]:
        return {
            "task": self.transcript.get("task"),
            "mode": self.transcript.get("mode"),
            "model": self.transcript.get("model"),
            "responses": len(self.responses),
            "cursor": self.cursor,
            "requests_served": self.requests_served,
        }


def create_app(service: TranscriptService) -> FastAPI:
    app = FastAPI(
        title="iker-desk transcript planner",
        description="Recorded planner responses behind a chat-completion endpoint",
        version="1.0.0",
    )

    @app.get("/api/health")
    async def health_check():
        return {"status": "healthy", **service.status()}

    @app.post("/v1/chat/completions")
    async def chat_completions(request: ChatRequest):
        if not request.messages:
            raise HTTPException(status_code=400, detail="messages must not be empty")
        logger.debug(f"Completion request with {len(request.messages)} messages")
        return service.next_response(request.model)

    @app.post("/api/reset")
    async def reset_transcript():
        service.reset()
        return {"status": "reset", **service.status()}

    return app
