"""
Pydantic models for iker-desk files and records
"""
