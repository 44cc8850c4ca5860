// assume(N > 1)
for (i = 0; i < N; i++) {
  A[i] = i;
}
// assert(exists i in [0, N) :: A[i] > 0)
// assert(exists j in [0, N) :: A[j] >= N - 1)
