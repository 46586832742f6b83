//! All-pairs squared-L2 neighbour lists, ties by row index.
#![allow(dead_code)]

pub fn all_pairs_knn(rows: &[Vec<f64>], members: &[usize], k: usize) -> Vec<Vec<usize>> {
    let m = members.len();
    let mut dist = vec![vec![0.0f64; m]; m];
    for a in 0..m {
        for b in 0..m {
            let (x, y) = (&rows[members[a]], &rows[members[b]]);
            dist[a][b] = (0..x.len()).map(|c| (x[c] - y[c]) * (x[c] - y[c])).sum();
        }
    }
    (0..m)
        .map(|a| {
            let mut others: Vec<usize> = (0..m).filter(|&b| b != a).collect();
            others.sort_by(|&p, &q| dist[a][p].partial_cmp(&dist[a][q]).unwrap().then(members[p].cmp(&members[q])));
            others.into_iter().take(k).map(|b| members[b]).collect()
        })
        .collect()
}
