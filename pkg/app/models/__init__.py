"""
Модели времени выполнения: траектории, ансамбли, кривые возврата, результаты.
"""
