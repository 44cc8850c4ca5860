for (i = 0; i < N; i++) {
  if (A[i] > N) {
    A[i] = N + 1;
  }
}
// assert(forall i in [0, N) :: A[i] <= N)
