# Scorers module
from .constant import ConstantScorer
from .separate import PerDimensionScorer
from .teacher import PlantedTeacherScorer

__all__ = ['ConstantScorer', 'PerDimensionScorer', 'PlantedTeacherScorer']
