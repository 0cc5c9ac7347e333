"""Core numerical engine"""
from .pipeline import InversionPipeline, InversionResult

__all__ = ['InversionPipeline', 'InversionResult']
