#![allow(dead_code)]

use promptforge::kbforge::Task;
use promptforge::provider::MockProvider;
use promptforge::vectors::EmbeddingVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Points around `blobs` well-separated centers on the coordinate axes.
pub fn blob_points(
    blobs: usize,
    per_blob: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> (Vec<EmbeddingVector>, Vec<usize>) {
    assert!(blobs <= dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for b in 0..blobs {
        for _ in 0..per_blob {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-spread..spread)).collect();
            v[b] += 1.0;
            points.push(EmbeddingVector::new(v).unwrap());
            labels.push(b);
        }
    }
    (points, labels)
}

/// Tasks whose staged embeddings form the given blobs.
pub fn staged_tasks(blobs: usize, per_blob: usize, seed: u64) -> (Vec<Task>, MockProvider, Vec<usize>) {
    let (points, labels) = blob_points(blobs, per_blob, 8, 0.02, seed);
    let mut mock = MockProvider::new(seed);
    let mut tasks = Vec::new();
    for (i, (p, l)) in points.into_iter().zip(&labels).enumerate() {
        let task = Task::new(
            format!("task_{i:02}"),
            format!("Synthetic task {i} drawn from family {l}."),
        );
        mock = mock.with_embedding(task.embedding_text(), p);
        tasks.push(task);
    }
    (tasks, mock, labels)
}

/// Rousseeuw silhouette by direct definition; singletons score 0.
pub fn naive_silhouette(points: &[EmbeddingVector], labels: &[usize]) -> f64 {
    let dist = |a: &EmbeddingVector, b: &EmbeddingVector| {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..points.len() {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..points.len() {
            if i != j {
                sums[labels[j]] += dist(&points[i], &points[j]);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / points.len() as f64
}

/// True when two labelings describe the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}
