"""Measurement toolkit for ad ecosystems: plan, crawl, classify and analyze ad impressions."""

__version__ = "0.1.0"
