for (i = 0; i < N; i++) {
  B[i] = 0;
  for (j = 0; j < i; j++) {
    B[i] = B[i] + 1;
  }
}
// assert(forall i in [0, N) :: B[i] == N)
