"""
Rare Event Toolkit - оценка вероятностей и времён возврата редких событий.
"""

__version__ = "1.0.0"
