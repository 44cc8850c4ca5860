for (i = 0; i < N - 1; i++) {
  A[i] = N;
}
// assert(forall i in [0, N) :: A[i] == N)
