from rilltools.fuzzy import Lukasiewicz, Reichenbach, Sigmoidal, logic_likelihood
from rilltools.logic import KnowledgeBase
from rilltools.losses import Hinge, L2, L2Hinge, NegLogBase2
from rilltools.parser import parse_rule

__version__ = '0.1.0'

__all__ = ('KnowledgeBase', 'parse_rule', 'Reichenbach', 'Lukasiewicz', 'Sigmoidal',
           'logic_likelihood', 'NegLogBase2', 'L2', 'Hinge', 'L2Hinge')
