"""
Pydantic схемы: системы, наклон, GEV, оценки и конфигурации экспериментов.
"""
