"""
Core модули приложения: исключения, потоки случайных чисел, пул воркеров, хранение результатов.
"""
