from .communities import (GirvanNewmanResult, MapEquationResult, edge_betweenness,
                          edge_betweenness_communities, flow_matrix, map_equation,
                          map_equation_communities, weighted_modularity)
from .graph import (HitsScores, MobilityNetwork, NetworkError, Partition, SCoreResult,
                    congruence, from_flow_table, hits_scores, node_strength,
                    quantile_partition, s_core_decomposition, type7_quantile)
