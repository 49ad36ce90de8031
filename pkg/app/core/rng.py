"""
app/core/rng.py
Счётные (counter-based) потоки случайных чисел.

Каждый поток: Philox с ключом, зависящим от (seed, номер эксперимента),
и счётчиком (0, назначение, эпоха, слот частицы). Поэтому результат не зависит
от порядка, в котором частицы или эксперименты обрабатываются воркерами.
"""
from enum import IntEnum
import numpy as np

# Слот, зарезервированный под потоки уровня ансамбля
ENSEMBLE_SLOT = np.iinfo(np.uint64).max


class StreamPurpose(IntEnum):
    """Назначение потока (второе слово счётчика)."""
    PARTICLE = 0
    SELECTION = 1
    INIT = 2
    BATCH = 3


class StreamFactory:
    """Фабрика независимых потоков для одного эксперимента."""

    def __init__(self, seed: int, experiment: int = 0):
        if seed < 0 or experiment < 0:
            raise ValueError("seed and experiment index must be non-negative")
        self.seed = int(seed)
        self.experiment = int(experiment)
        self._key = np.random.SeedSequence([self.seed, self.experiment]).generate_state(
            2, dtype=np.uint64
        )

    def _generator(self, purpose: StreamPurpose, epoch: int, slot: int) -> np.random.Generator:
        counter = np.array([0, int(purpose), int(epoch), int(slot)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=self._key))

    def particle(self, epoch: int, slot: int) -> np.random.Generator:
        """
        Поток частицы в слоте `slot` на эпохе `epoch`.

        Из него последовательно берутся: возмущение клона, шум интегрирования,
        равномерная величина u_n для клонирования.
        """
        return self._generator(StreamPurpose.PARTICLE, epoch, slot)

    def particles(self, epoch: int, count: int) -> list[np.random.Generator]:
        return [self.particle(epoch, slot) for slot in range(count)]

    def selection(self, epoch: int) -> np.random.Generator:
        """Поток для коррекции ΔN (выбор частиц на удаление/клонирование)."""
        return self._generator(StreamPurpose.SELECTION, epoch, ENSEMBLE_SLOT)

    def initial(self) -> np.random.Generator:
        """Поток для начальных условий ансамбля."""
        return self._generator(StreamPurpose.INIT, 0, ENSEMBLE_SLOT)

    def batch(self, chunk: int) -> np.random.Generator:
        """Поток для пакетной генерации (MC/GEV/контрольный прогон), по блокам."""
        return self._generator(StreamPurpose.BATCH, chunk, ENSEMBLE_SLOT)
