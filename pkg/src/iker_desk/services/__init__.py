"""
HTTP services
"""

from .transcript_server import TranscriptService, create_app
