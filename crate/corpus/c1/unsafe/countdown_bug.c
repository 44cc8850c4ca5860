for (i = 0; i < N; i++) {
  A[i] = N - i - 1;
}
// assert(forall i in [0, N) :: A[i] > 0)
