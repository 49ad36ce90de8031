"""
Численные помощники: конечные разности и проверка конечности.
"""
