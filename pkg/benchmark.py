from netdp import SynthConfig, UnsupConfig, generate, ingest_edges, train_unsup
from netdp.param_store import ParamStore
import time
from typing import List, Tuple
import pandas as pd
import matplotlib.pyplot as plt


def build_graph(n_nodes: int, num_shards: int, seed: int = 7):
    """Generate a 4-block synthetic graph with mean degree around 30"""
    block = n_nodes // 4
    cfg = SynthConfig(num_nodes=n_nodes, num_blocks=4, p_in=25.0 / block, p_out=5.0 / (3 * block),
                      seed=seed)
    dataset = generate(cfg)
    return ingest_edges(dataset.edge_lines(), num_shards=num_shards)


def run_benchmark(graph, n_workers: int, epochs: int, dim: int) -> Tuple[float, float]:
    """Train the unsupervised embedding and return (seconds, final probe loss)"""
    cfg = UnsupConfig(dim=dim, max_epochs=epochs, workers=n_workers, learning_rate=0.025)
    store = ParamStore(num_shards=graph.num_shards)
    start_time = time.time()
    emb = train_unsup(graph, store, cfg)
    return time.time() - start_time, emb.probe_history[-1]


def main():
    # Test parameters
    graph_sizes = [5_000, 20_000]
    n_workers_list = [1, 2, 4, 8]
    epochs = 3
    dim = 32

    results: List[dict] = []

    try:
        for n_nodes in graph_sizes:
            graph = build_graph(n_nodes, num_shards=max(n_workers_list))
            base_time = None
            for n_workers in n_workers_list:
                print(f"Testing: {n_nodes} nodes, {graph.num_edges()} edges with {n_workers} workers")
                elapsed, probe_loss = run_benchmark(graph, n_workers, epochs, dim)
                if n_workers == 1:
                    base_time = elapsed
                results.append({
                    'n_nodes': n_nodes,
                    'n_edges': graph.num_edges(),
                    'n_workers': n_workers,
                    'seconds': elapsed,
                    'nodes_per_second': n_nodes * epochs / elapsed,
                    'speedup': base_time / elapsed,
                    'probe_loss': probe_loss,
                })

        df = pd.DataFrame(results)
        df.to_csv('benchmark_results.csv', index=False)

        print("\nBenchmark Summary:")
        print("=================")
        for n_nodes in graph_sizes:
            data = df[df['n_nodes'] == n_nodes]
            best = data.loc[data['speedup'].idxmax()]
            print(f"\nGraph: {n_nodes} nodes")
            print(f"Best speedup: {best['speedup']:.2f}x with {int(best['n_workers'])} workers")
            print(f"Max throughput: {data['nodes_per_second'].max():.0f} nodes/second")
            spread = data['probe_loss'].max() / data['probe_loss'].min() - 1
            print(f"Probe loss spread across worker counts: {spread:.2%}")

        plt.figure(figsize=(12, 6))

        plt.subplot(1, 2, 1)
        for n_nodes in graph_sizes:
            data = df[df['n_nodes'] == n_nodes]
            plt.plot(data['n_workers'], data['speedup'], marker='o', label=f'{n_nodes} nodes')
        plt.xlabel('Number of Workers')
        plt.ylabel('Speedup')
        plt.title('Speedup vs Worker Count')
        plt.grid(True, alpha=0.3)
        plt.legend()

        plt.subplot(1, 2, 2)
        for n_nodes in graph_sizes:
            data = df[df['n_nodes'] == n_nodes]
            plt.plot(data['n_workers'], data['nodes_per_second'], marker='o', label=f'{n_nodes} nodes')
        plt.xlabel('Number of Workers')
        plt.ylabel('Nodes per Second')
        plt.title('Throughput vs Worker Count')
        plt.grid(True, alpha=0.3)
        plt.legend()

        plt.tight_layout()
        plt.savefig('benchmark_results.png', dpi=300, bbox_inches='tight')
        plt.close()

    except KeyboardInterrupt:
        print("\nBenchmark interrupted by user.")


if __name__ == '__main__':
    main()
